// placeholder, replaced by the real IO implementation
