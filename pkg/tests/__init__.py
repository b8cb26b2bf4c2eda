"""Test suite for Aerospace Parts Material Management API."""
