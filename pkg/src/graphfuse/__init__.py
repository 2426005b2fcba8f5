"""Graph-based fusion of heterogeneous per-frame speech features for emotion regression."""
