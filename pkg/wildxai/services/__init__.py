"""Pipeline, predictor, explainer, analytics, rendering and study services."""
