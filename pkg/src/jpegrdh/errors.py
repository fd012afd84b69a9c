"""Exception hierarchy shared by the codec, cost model, selector and embedder."""


class RDHError(Exception):
    """Base class for every error raised by this package."""


# -- codec ---------------------------------------------------------------

class JpegError(RDHError, ValueError):
    """Anything wrong with a JPEG bitstream."""


class UnsupportedFormat(JpegError):
    pass


class CorruptStream(JpegError):
    pass


class MissingTable(JpegError):
    pass


class CoefficientOverflow(RDHError, ValueError):
    """A coefficient cannot be represented by the baseline entropy coder."""


# -- transform / cost model ------------------------------------------------

class DimensionMismatch(RDHError, ValueError):
    pass


class ZeroLength(RDHError, ValueError):
    pass


class EmptyFrequency(RDHError, ValueError):
    pass


# -- selector ---------------------------------------------------------------

class Infeasible(RDHError):
    pass


class BudgetUnsatisfiable(RDHError):
    pass


class TooLarge(RDHError, ValueError):
    pass


# -- embedder ---------------------------------------------------------------

class OverflowRisk(RDHError):
    pass


class ShortStream(RDHError):
    pass


class InsufficientCapacity(RDHError):
    pass


class InsufficientAuxCapacity(InsufficientCapacity):
    pass


class AuxDecodeError(RDHError):
    pass


class TruncatedStego(AuxDecodeError):
    pass
