"""Epoch normalisation, class balancing and stratified splits."""
