"""Built-in word banks that schema configs may reference as ``@name``."""

from __future__ import annotations

US_STATES: tuple[str, ...] = (
    "Alabama", "Alaska", "Arizona", "Arkansas", "California", "Colorado",
    "Connecticut", "Delaware", "Florida", "Georgia", "Hawaii", "Idaho",
    "Illinois", "Indiana", "Iowa", "Kansas", "Kentucky", "Louisiana", "Maine",
    "Maryland", "Massachusetts", "Michigan", "Minnesota", "Mississippi",
    "Missouri", "Montana", "Nebraska", "Nevada", "New Hampshire", "New Jersey",
    "New Mexico", "New York", "North Carolina", "North Dakota", "Ohio",
    "Oklahoma", "Oregon", "Pennsylvania", "Rhode Island", "South Carolina",
    "South Dakota", "Tennessee", "Texas", "Utah", "Vermont", "Virginia",
    "Washington", "West Virginia", "Wisconsin", "Wyoming",
    # whole-country token
    "United States",
)

CA_PROVINCES: tuple[str, ...] = (
    "Alberta", "British Columbia", "Manitoba", "New Brunswick",
    "Newfoundland and Labrador", "Nova Scotia", "Ontario",
    "Prince Edward Island", "Quebec", "Saskatchewan",
    "Northwest Territories", "Nunavut", "Yukon",
    "Canada",
)

BUILTIN_BANKS: dict[str, tuple[str, ...]] = {
    "us_states": US_STATES,
    "ca_provinces": CA_PROVINCES,
}

# How a built-in bank is named in the system message instead of listing it.
BUILTIN_BANK_SUMMARIES: dict[str, str] = {
    "us_states": 'the full names of the 50 US states, plus "United States" for the whole country',
    "ca_provinces": 'the full names of the Canadian provinces and territories, plus "Canada" for the whole country',
}
