"""
Prediction of the predominant sentiment of replies to a tweet.

Stage 1 trains a message-level classifier on labeled tweets. Its predictions
on reply threads are aggregated into automatic labels for the source tweets,
and stage 2 trains reply-sentiment classifiers on those labels.
"""

__version__ = '1.0.0'
