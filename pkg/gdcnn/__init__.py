"""
GDCNN: gender determination from hand radiographs with a small numpy CNN
"""

__version__ = '1.0.0'
