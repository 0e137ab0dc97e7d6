# exif-forensics tests package
