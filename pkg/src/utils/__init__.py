# Config loading, logging, retry and thread-pool helpers
