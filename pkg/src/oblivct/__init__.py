"""Two-server private Certificate Transparency lookups.

A client retrieves a Merkle inclusion proof for a domain's certificate
from a pair of non-colluding servers without either server learning which
domain was queried. Storage is a Circuit ORAM tree split into XOR shares,
queries run through semi-honest garbled-circuit 2PC, and the serving path
is pipelined and batched.
"""

__version__ = "0.1.0"
