import pytest

from cavsignal.network import Approach, Movement, WorldConfig
from cavsignal.sim import Vehicle, VehicleKind, World


def place(world, approach, lane_index, pos, speed=0.0, kind=VehicleKind.HDV, movement=None):
    """Put a vehicle directly into a lane, keeping the lane ordered front to back."""
    lane = world.network.lanes[(Approach(approach), lane_index)]
    if movement is None:
        movement = Movement.LEFT if lane_index == 0 else Movement.STRAIGHT
    veh = Vehicle(world._next_id, kind, lane.approach, movement, lane, float(pos), float(speed),
                  world.clock, world.config.box_path_length[movement])
    world._next_id += 1
    world.spawned += 1
    lane.vehicles.append(veh)
    lane.vehicles.sort(key=lambda v: v.pos)
    return veh


@pytest.fixture
def empty_world():
    return World(WorldConfig(expected_vehicles=0.0, duration=600.0))
