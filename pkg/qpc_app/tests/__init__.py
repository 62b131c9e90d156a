# Tests package for the QPC 0.7-anomaly toolkit
