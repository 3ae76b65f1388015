# Empty file to make workers a package
