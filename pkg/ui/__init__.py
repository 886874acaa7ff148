# This file makes the 'ui' directory a Python package. 