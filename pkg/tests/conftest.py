import asyncio
import os
import threading

import pytest
from hypothesis import settings

from hybridedge.agent import Agent, AgentConfig
from hybridedge.api import start_api
from hybridedge.backends import SimulatedBackend
from hybridedge.calibration import CalibrationRegistry
from hybridedge.clock import Clock
from hybridedge.manager import Manager
from hybridedge.service import ManagerService

settings.register_profile("default", deadline=None)
settings.register_profile("ci", deadline=None, max_examples=50)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))



class LiveCluster:
    """Manager, two simulated workers and the HTTP API on a background loop."""

    def __init__(self, tmp_path, workers=2, time_scale=50.0):
        self.loop = asyncio.new_event_loop()
        self.thread = threading.Thread(target=self.loop.run_forever, daemon=True)
        self.thread.start()
        self.manager = Manager()
        self.tmp_path = tmp_path
        self.workers = workers
        self.time_scale = time_scale
        self.call(self._start())
        self.api = start_api(self.manager, self.loop, "127.0.0.1", 0)
        self.url = f"http://127.0.0.1:{self.api.server_address[1]}"

    def call(self, coro, timeout=10):
        return asyncio.run_coroutine_threadsafe(coro, self.loop).result(timeout)

    async def _start(self):
        self.clock = Clock(self.time_scale)
        self.service = ManagerService(self.manager, self.clock)
        self.service.start()
        registry = CalibrationRegistry.default()
        self.agents = []
        for k in range(self.workers):
            node = f"w{k + 1}"
            backend = SimulatedBackend(registry, self.clock, self.tmp_path / node)
            agent = Agent(AgentConfig(node_id=node), backend, self.clock, self.service.connect_memory_async)
            self.agents.append(asyncio.ensure_future(agent.run()))
        for _ in range(1000):
            if len(self.service.outboxes) == self.workers:
                return
            await asyncio.sleep(0.001)
        raise RuntimeError("workers did not register")

    async def _stop(self):
        for task in self.agents:
            task.cancel()
        self.service.stop()

    def wait_for(self, predicate, timeout=10.0):
        async def poll():
            while not predicate(self.manager):
                await asyncio.sleep(0.005)
        self.call(asyncio.wait_for(poll(), timeout), timeout + 1)

    def close(self):
        self.api.shutdown()
        self.call(self._stop())
        self.loop.call_soon_threadsafe(self.loop.stop)
        self.thread.join(5)


@pytest.fixture
def live_cluster(tmp_path):
    cluster = LiveCluster(tmp_path)
    yield cluster
    cluster.close()
