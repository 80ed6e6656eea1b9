from prometheus_client import Gauge, Counter, generate_latest

from app.models.report import StackStats, TransportStats

# Define Prometheus metrics
# Bytes moved through the virtual transport, by direction (sent/received)
TRANSPORT_BYTES_TOTAL = Counter(
    'dbmm_transport_bytes_total',
    'Payload bytes moved through the virtual transport',
    ['direction']
)

MESSAGES_TOTAL = Counter(
    'dbmm_messages_total',
    'Point-to-point messages sent through the virtual transport'
)

STACKS_GENERATED_TOTAL = Counter(
    'dbmm_stacks_generated_total',
    'Multiplication stacks produced by the generation phase'
)

STACK_ENTRIES_TOTAL = Counter(
    'dbmm_stack_entries_total',
    'Block multiplications scheduled in stacks'
)

MULTIPLICATIONS_TOTAL = Counter(
    'dbmm_multiplications_total',
    'Completed distributed multiplications',
    ['algorithm', 'densified']
)

# Gauge for the wall time of the most recent multiplication
LAST_MULTIPLY_SECONDS = Gauge(
    'dbmm_last_multiply_seconds',
    'Wall time of the most recent distributed multiplication',
    ['algorithm', 'densified']
)

AUTOTUNE_MEASUREMENTS_TOTAL = Counter(
    'dbmm_autotune_measurements_total',
    'Kernel timing measurements taken by the autotuner'
)

BUFFER_POOL_ALLOCATIONS_TOTAL = Counter(
    'dbmm_buffer_pool_allocations_total',
    'Fresh arena allocations made by the buffer pool'
)

def record_transport(stats: TransportStats):
    """Adds one run's traffic to the transport counters."""
    TRANSPORT_BYTES_TOTAL.labels(direction='sent').inc(stats.total_sent)
    TRANSPORT_BYTES_TOTAL.labels(direction='received').inc(stats.total_received)
    MESSAGES_TOTAL.inc(sum(r.messages_sent for r in stats.ranks))

def record_stacks(stats: StackStats):
    STACKS_GENERATED_TOTAL.inc(stats.stacks)
    STACK_ENTRIES_TOTAL.inc(stats.entries)

def record_multiplication(algorithm: str, densified: bool, seconds: float):
    """Counts a finished multiplication and remembers its wall time."""
    labels = {'algorithm': algorithm, 'densified': str(densified).lower()}
    MULTIPLICATIONS_TOTAL.labels(**labels).inc()
    LAST_MULTIPLY_SECONDS.labels(**labels).set(seconds)

def increment_autotune_measurements(count: int = 1):
    AUTOTUNE_MEASUREMENTS_TOTAL.inc(count)

def increment_pool_allocations():
    BUFFER_POOL_ALLOCATIONS_TOTAL.inc()

def get_metrics() -> bytes:
    """Generates the latest Prometheus metrics in text format."""
    return generate_latest()
