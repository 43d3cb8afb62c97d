"""Tree-ensemble severity classifiers with SHAP, LIME and symbolic-metamodel explanations."""

__version__ = "0.1.0"
