#!/usr/bin/env python3
"""
Build the flapguard documentation.

Usage: ``python doc/make.py [builder]``, the builder defaults to html.
"""

import os
import subprocess
import sys

CURRENT_PATH = os.path.dirname(os.path.abspath(__file__))
SOURCE_DIR = os.path.join(CURRENT_PATH, 'source')
BUILD_DIR = os.path.join(CURRENT_PATH, 'build')


def run_build(builder: str) -> int:
    return subprocess.run(
        ['sphinx-build', '-b', builder, SOURCE_DIR,
         os.path.join(BUILD_DIR, builder)]
    ).returncode


if __name__ == '__main__':
    sys.exit(run_build(sys.argv[1] if len(sys.argv) > 1 else 'html'))
