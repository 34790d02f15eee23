# This file is generated from setup.py
# DO NOT EDIT BY HAND

version = "0.1.0"
time_version = "unknown"
git_version = "unknown"
full_version = version + '-' + time_version + '-' + git_version
