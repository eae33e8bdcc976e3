# Test package for brep_fitter
