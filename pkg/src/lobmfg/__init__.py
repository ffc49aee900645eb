"""Equilibrium order-book model: queue-size dynamics driven by strategic routing."""
from .model import (AgentClass, DecisionField, DomainError, MarketConfig, ValueField,
                    apply_boundary, buy_price, lp_buy_indicator, lp_sell_indicator,
                    sell_price)

__all__ = ["AgentClass", "DecisionField", "DomainError", "MarketConfig", "ValueField",
           "apply_boundary", "buy_price", "lp_buy_indicator", "lp_sell_indicator",
           "sell_price"]
__version__ = "0.1.0"
