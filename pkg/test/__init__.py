"""reland test Base Module

Unit tests for the reland kernels, components and command line. Run with
``python3 -m unittest discover -s test -p "*_test.py" -t .``; see
``test/_constants.py`` for the environment variables that enable the slow and
real-data tests.
"""
