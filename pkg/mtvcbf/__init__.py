"""mtvcbf - learned minimum-translation-vector safety margins for car-like robots behind a CBF safety filter"""

__version__ = "1.0.0"
