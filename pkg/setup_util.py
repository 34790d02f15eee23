import subprocess


def _git(*args):
    try:
        out = subprocess.check_output(['git'] + list(args), stderr=subprocess.DEVNULL)
    except (subprocess.CalledProcessError, OSError):
        return 'unknown'
    return out.decode('utf-8', 'replace').strip()


def git_version():
    return _git('rev-parse', 'HEAD')[:8]


def git_commit_timestamp():
    return _git('show', '-s', '--format=%ct', 'HEAD')


def read_requirements(path):
    "Requirement lines of `path`, without comments and blank lines"
    with open(path) as fd:
        lines = [line.split('#', 1)[0].strip() for line in fd]
    return [line for line in lines if line]


def write_version_module(version, path):
    from textwrap import dedent
    contents = dedent("""\
    # This file is generated from setup.py
    # DO NOT EDIT BY HAND

    version = "{version}"
    time_version = "{time}"
    git_version = "{git}"
    full_version = version + '-' + time_version + '-' + git_version
    """.format(version=version, time=git_commit_timestamp(), git=git_version()))

    with open(path, 'w') as fd:
        fd.write(contents)
