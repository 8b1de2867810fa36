"""Deterministic mission simulator for a tracked wetland sampling robot.

Everything downstream of a (scenario, seed) pair is reproducible:
sensors draw from counter-based streams, the world runs on an integer
tick clock, and planners and controllers are pure functions of their
inputs.
"""

from .alignment import (AlignmentState, AlignResult, PiGains, RingLatch,
                        TcpFrame, align_until_converged, alignment_errors,
                        pi_step)
from .chassis import (ChassisParams, InvalidCommandError, SlipModel,
                      StepSizeError, TrackSpeeds, clamp_twist,
                      forward_kinematics, inverse_kinematics, slip_twist,
                      step_ground_truth)
from .costmap import (INSCRIBED, LETHAL, NoGoRegion, OccupancyCostmap,
                      OutOfBoundsError, RegionInvalidError, add_lethal_mask,
                      build_costmap, is_pose_collision_free, reinflate)
from .estimation import (FilterDivergedError, FilterLog, GaussianState,
                         Measurement, MeasurementSequencer, OnlineFilter,
                         UkfConfig, KinematicsOnlyOdometry, merge_streams,
                         run_position_filter, run_velocity_filter, sigma_points,
                         ukf_predict, ukf_update)
from .follower import (FollowCommand, FollowResult, PathLostError, PathTracker,
                       RppConfig, compute_command, follow_until_done)
from .geometry import (Pose2D, Twist, angle_diff, integrate_unicycle,
                       wrap_angle, wrap_angle_array)
from .lift import (COMMANDS, PHASES, SEAL_TOLERANCE, CouplingResult,
                   LiftParams, LiftState, attempt_coupling, lift_step)
from .mission import (MissionLog, MissionPlan, MissionSettings, RingGoal,
                      RingMetrics, StagingUnreachableError,
                      derive_staging_pose, run_mission)
from .planner import (InvalidEndpointError, NoPathFound, PlannedPath,
                      PlannerConfig, dubins_shortest, grid_distance_field,
                      plan, smooth_path)
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario
from .sensors import (EncoderSim, GpsSim, ImuSim, NoiseProfile,
                      RingSensorSim, SchedulingError, named_profile)
from .world import SimWorld, TrajectorySample

__version__ = "0.1.0"
