"""Light ray transform toolkit: wave propagation, ray transforms and reconstruction on a periodic box."""
