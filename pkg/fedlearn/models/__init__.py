# Model artifacts
