"""Decides whether a client project is exploitable through a vulnerable
library function: a genetic search drives a test into the function, then the
known exploit's payload is migrated into that test until the vulnerability's
trigger condition fires."""

__version__ = "0.1.0"
