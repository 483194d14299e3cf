class StatsError(Exception):
    pass


class ZeroVariance(StatsError):
    pass


class SampleSizeOutOfRange(StatsError):
    pass


class ZeroErrorVariance(StatsError):
    pass


class AllZeroDifferences(StatsError):
    pass


class InsufficientData(StatsError):
    pass
