# Services package
"""
Tessera services - experiment drivers, trial pool, reports, rendering
"""
