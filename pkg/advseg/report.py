"""
Indented plain-text reports.

USAGE:

>>> with Report() as ref:
...   ref.writeln('gradient checks')
...   ref.indent()
...   ref.table(['layer', 'error'], [['relu', '0.0']])
...   text = ref.getvalue()
"""
from __future__ import absolute_import

import io


class Report(io.StringIO):
    "A text buffer with an indentation level"

    def __init__(self, *args, **kws):
        super(Report, self).__init__(*args, **kws)
        self.indentlvl = 0
        self._at_line_start = True

    def _check_open(self):
        if self.closed:
            raise ValueError('I/O operation on closed report')

    def indent(self, by=4):
        """Increase the indentation level"""
        self._check_open()
        self.indentlvl += by

    def dedent(self, by=4):
        """Decrease the indentation level, never below zero"""
        self._check_open()
        if self.indentlvl >= by:
            self.indentlvl -= by

    def write(self, s):
        """Write a string, indenting every line it starts.

        Empty lines are left unindented.
        """
        self._check_open()
        pieces = s.split('\n')
        for i, piece in enumerate(pieces):
            line = piece + '\n' if i < len(pieces) - 1 else piece
            if not line:
                continue
            if self._at_line_start and line != '\n':
                super(Report, self).write(self.indentlvl * ' ')
            super(Report, self).write(line)
            self._at_line_start = line.endswith('\n')
        return len(s)

    def writeln(self, s=None):
        """Write a string followed by a newline"""
        if s is not None:
            if not isinstance(s, str):
                raise TypeError('expected str, got {}'.format(type(s).__name__))
            self.write(s)
        self.write('\n')

    def table(self, header, rows):
        """Write left-aligned columns separated by two spaces"""
        rows = [[str(cell) for cell in row] for row in rows]
        header = [str(cell) for cell in header]
        widths = [len(h) for h in header]
        for row in rows:
            if len(row) != len(header):
                raise ValueError('row {} has {} cells, header has {}'.format(row, len(row), len(header)))
            widths = [max(w, len(cell)) for w, cell in zip(widths, row)]
        for row in [header] + rows:
            self.writeln('  '.join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
