"""Exception hierarchy. Every error the CLI can report derives from PastError."""


class PastError(ValueError):
    pass


class ZeroVectorRow(PastError):
    pass


class InvalidK(PastError):
    pass


class InvalidMinSamples(PastError):
    pass


class InvalidEps(PastError):
    pass


class EmptyCluster(PastError):
    pass


class NotEnoughClusters(PastError):
    pass


class EtaTooLarge(PastError):
    pass


class DegenerateBatch(PastError):
    pass


class ShapeMismatch(PastError):
    pass


class LabelOutOfRange(PastError):
    pass


class StaleCache(PastError):
    pass


class EmptySelection(PastError):
    pass


class MissingLabels(PastError):
    pass


class NoValidGallery(PastError):
    pass


class NoClusteredSamples(PastError):
    pass


class InvalidSpec(PastError):
    pass


class ConfigError(PastError):
    pass
