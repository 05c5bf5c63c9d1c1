"""GRF waveform prediction from wearable inertial sensors."""
