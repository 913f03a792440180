"""
Ruelle probability cascades, hierarchical fields, the Mezard-Parisi functional
and finite diluted spin systems.
"""
