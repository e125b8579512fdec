"""Test suite for the factorizephys package."""
