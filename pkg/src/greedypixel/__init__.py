"""GreedyPixel adversarial attack."""
