"""EM-TTS style two-stage convolutional text-to-speech."""
