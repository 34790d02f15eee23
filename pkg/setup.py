from setuptools import setup, find_packages
from setup_util import read_requirements, write_version_module

VERSION = '0.1.0'

write_version_module(VERSION, 'advseg/version.py')

setup(
    name = 'advseg',
    version = VERSION,
    packages = find_packages(exclude=['tests']),
    install_requires = read_requirements('requirements/runtime.txt'),
    extras_require = {
        'tests': read_requirements('requirements/tests.txt'),
        'docs': read_requirements('requirements/docs.txt'),
    },
    entry_points = {
        'console_scripts': ['advseg = advseg.cli:main'],
    },
    description = 'Adversarial U-Net segmentation of stroke lesions in CT perfusion volumes',
    license = 'GPLv2',
    python_requires = '>=3.8',
    )
