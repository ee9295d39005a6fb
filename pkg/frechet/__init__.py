# Frechet package initialization
