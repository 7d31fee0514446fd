# Text handling: canonical keys, Wikitext parsing, similarity measures
