# Shared data model and run configuration
