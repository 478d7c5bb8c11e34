"""HTTP front end for follow sessions."""
