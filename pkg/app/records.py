"""
Domain records shared by the corpus, labeling and evaluation code.
"""
from enum import IntEnum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, field_validator


class SentimentLabel(IntEnum):
    """Three-way polarity; the index order is used for every axis and tie-break"""
    NEGATIVE = 0
    NEUTRAL = 1
    POSITIVE = 2

    @classmethod
    def parse(cls, value):
        """Parse a label name case-insensitively. Raises ValueError on unknown names."""
        if isinstance(value, SentimentLabel):
            return value
        if not isinstance(value, str):
            raise ValueError(f"label must be a string, got {type(value).__name__}")
        try:
            return cls[value.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown label '{value}' (expected negative, neutral or positive)")

    @property
    def label_name(self):
        return self.name.lower()


LABEL_NAMES = [label.label_name for label in SentimentLabel]
NUM_CLASSES = len(SentimentLabel)


class LabeledTweet(BaseModel):
    """A message with its sentiment label"""
    model_config = ConfigDict(frozen=True)

    id: str
    text: str
    label: SentimentLabel

    @field_validator('text')
    @classmethod
    def _text_not_blank(cls, value):
        if not value.strip():
            raise ValueError("text is empty")
        return value

    def to_record(self):
        return {'id': self.id, 'text': self.text, 'label': self.label.label_name}


class ThreadRecord(BaseModel):
    """A source tweet with its first-order replies"""
    model_config = ConfigDict(frozen=True)

    source_id: str
    source_text: str
    replies: List[str]
    gold_label: Optional[SentimentLabel] = None

    def to_record(self):
        record = {
            'source_id': self.source_id,
            'source_text': self.source_text,
            'replies': list(self.replies),
        }
        if self.gold_label is not None:
            record['gold_label'] = self.gold_label.label_name
        return record
