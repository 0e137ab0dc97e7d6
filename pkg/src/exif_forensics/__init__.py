"""exif-forensics - Camera-metadata contrastive representations and zero-shot splice forensics."""

__version__ = "0.1.0"
