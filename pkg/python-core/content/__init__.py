# SA3 - Content Module: seeded scene generation and dataset files
