# Prompt rendering, backends and the model gateway.
