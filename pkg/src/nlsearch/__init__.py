"""Natural-language to search-entity translation, query compilation and evaluation."""
