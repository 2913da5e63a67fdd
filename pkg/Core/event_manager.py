# Core/event_manager.py

from collections import defaultdict
import threading
from Utils.log_utils import get_logger, DEBUG_L2, DEBUG_L3

# Topics published by the library
CAPACITY_SOLVED = 'capacity/solve/completed'
SOLVER_ITERATION = 'solver/iteration'
SOLVER_FINISHED = 'solver/finished'
CHECK_COMPLETED = 'harness/check/completed'


class EventManager:
    """Thread-safe publish/subscribe hub for progress notifications.

    Capacity solves, solver iterations and harness checks publish here; the
    CLI subscribes to turn them into log lines. Publishing never raises:
    subscriber failures are logged and swallowed so a broken listener cannot
    abort a numerical run.
    """
    _instance = None

    @classmethod
    def get_instance(cls):
        if cls._instance is None:
            cls._instance = EventManager()
        return cls._instance

    def __init__(self):
        if EventManager._instance is not None:
            raise Exception("EventManager already exists! Use EventManager.get_instance() instead.")

        self.listeners = defaultdict(list)
        self.lock = threading.Lock()
        self.logger = get_logger()
        EventManager._instance = self

    def subscribe(self, topic, callback):
        with self.lock:
            self.listeners[topic].append(callback)
        self.logger.debug_at_level(DEBUG_L2, "EventManager", f"+ listener on '{topic}'")

    def unsubscribe(self, topic, callback):
        with self.lock:
            if callback in self.listeners.get(topic, ()):
                self.listeners[topic].remove(callback)
                self.logger.debug_at_level(DEBUG_L2, "EventManager", f"- listener on '{topic}'")
                return
        self.logger.warning("EventManager", f"No such listener on '{topic}', nothing removed")

    def publish(self, topic, data=None):
        """
        Deliver data to every subscriber of topic, in subscription order.
        """
        with self.lock:
            callbacks = list(self.listeners.get(topic, ()))
        if not callbacks:
            return

        self.logger.debug_at_level(DEBUG_L3, "EventManager", f"Publishing '{topic}' to {len(callbacks)} subscriber(s).")
        for callback in callbacks:
            try:
                callback(data)
            except Exception as e:
                self.logger.error("EventManager", f"Listener on '{topic}' failed: {type(e).__name__}: {e}")

    def unsubscribe_all(self):
        with self.lock:
            self.listeners.clear()
        self.logger.debug_at_level(DEBUG_L2, "EventManager", "All listeners removed")
