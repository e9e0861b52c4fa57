"""Phase transitions of mean-field particle systems under the Random Batch
Method: the Curie-Weiss chain with random batches and the double-well
McKean-Vlasov system."""

__version__ = "0.1.0"
