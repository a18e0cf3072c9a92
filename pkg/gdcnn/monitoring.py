import os
from typing import Optional
from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile
from gdcnn.logger import setup_logger
from gdcnn.config import settings

logger = setup_logger(__name__)

registry = CollectorRegistry()

# Define metrics
samples_processed_total = Counter(
    'gdcnn_samples_processed_total',
    'Samples passed through forward/backward',
    ['phase'],
    registry=registry
)

epochs_completed_total = Counter(
    'gdcnn_epochs_completed_total',
    'Completed training epochs',
    registry=registry
)

epoch_loss = Gauge(
    'gdcnn_epoch_loss',
    'Mean loss of the last completed epoch',
    ['split'],
    registry=registry
)

epoch_accuracy = Gauge(
    'gdcnn_epoch_accuracy',
    'Accuracy of the last completed epoch',
    ['split'],
    registry=registry
)

batch_duration = Histogram(
    'gdcnn_batch_duration_seconds',
    'Time spent on one optimization step',
    buckets=[0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 30.0],
    registry=registry
)

cam_maps_total = Counter(
    'gdcnn_cam_maps_total',
    'Class activation maps computed',
    ['identity'],
    registry=registry
)


class MetricsCollector:
    def __init__(self):
        self.samples = 0
        self.epochs = 0
        self.cam_maps = 0
        self.identity_failures = 0

    def add_samples(self, count: int, phase: str = 'train'):
        """Count samples seen in a phase"""
        self.samples += count
        samples_processed_total.labels(phase=phase).inc(count)

    def observe_batch(self, seconds: float):
        batch_duration.observe(seconds)

    def record_epoch(self, train_loss: float, train_acc: float,
                     val_loss: Optional[float] = None, val_acc: Optional[float] = None):
        """Publish the epoch summary"""
        self.epochs += 1
        epochs_completed_total.inc()
        epoch_loss.labels(split='train').set(train_loss)
        epoch_accuracy.labels(split='train').set(train_acc)
        if val_loss is not None:
            epoch_loss.labels(split='val').set(val_loss)
            epoch_accuracy.labels(split='val').set(val_acc)

    def record_cam(self, identity_holds: bool):
        self.cam_maps += 1
        cam_maps_total.labels(identity='ok' if identity_holds else 'failed').inc()
        if not identity_holds:
            self.identity_failures += 1
            logger.warning(f"CAM score identity failures: {self.identity_failures}")

    def get_stats(self):
        """Current in-process tallies"""
        return {
            'samples': self.samples,
            'epochs': self.epochs,
            'cam_maps': self.cam_maps,
            'identity_failures': self.identity_failures
        }

    def flush(self, path: Optional[str] = None):
        """Write the registry in Prometheus text format when metrics are enabled"""
        if not settings.ENABLE_METRICS:
            return
        path = path or settings.METRICS_PATH
        try:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            write_to_textfile(path, registry)
            logger.info(f"Metrics written to {path}")
        except OSError as e:
            logger.error(f"Failed to write metrics: {e}")


# Create global metrics collector instance
metrics = MetricsCollector()
