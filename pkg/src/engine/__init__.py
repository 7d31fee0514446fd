# BFS frontier engine and run-directory persistence.
