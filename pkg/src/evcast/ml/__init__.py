"""Gradient-boosted trees and LSTM networks, both written against numpy."""
