# Generation backends behind the complete/embed/classify_failure contract.
