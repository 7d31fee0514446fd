# Corpus evaluation: reference retrieval, web evidence, claim factuality
