"""Graph-robustness toolkit for self-propagating malware.

Models malware spread with the SIIDR compartmental model and evaluates
topological defenses (node splitting, edge and node hardening, community
isolation and their hybrids) on communication graphs.
"""

__version__ = "0.1.0"
