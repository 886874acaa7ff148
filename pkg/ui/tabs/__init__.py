# This file makes the 'tabs' directory a Python package. 