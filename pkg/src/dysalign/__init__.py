"""Dysfluency-aware speech/text alignment at desk scale."""
