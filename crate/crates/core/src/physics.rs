//! Planar rigid-body world: one polygonal payload pushed by disc agents.
//!
//! Agents are kinematic unicycles; velocity commands are realized exactly,
//! subject only to the configured bounds, and contact reactions never push
//! an agent back. The payload integrates Newton-Euler with semi-implicit
//! Euler under penalty contact forces and viscous ground damping. Agents do
//! not collide with each other.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planar::{Pose2, Twist2, Vec2, Wrench2};

/// Rigid payload with a convex polygon footprint.
///
/// `shape` is the vertex list in the body frame, counterclockwise. `desired`
/// is the target pose the team is steering toward. A pinned payload keeps
/// its center fixed and only rotates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayloadState {
    pub pose: Pose2,
    pub twist: Twist2,
    pub shape: Vec<Vec2>,
    pub mass: f64,
    pub inertia: f64,
    pub desired: Pose2,
    pub pinned: bool,
}

impl PayloadState {
    pub fn new(
        shape: Vec<Vec2>,
        mass: f64,
        inertia: f64,
        pose: Pose2,
        desired: Pose2,
    ) -> Result<Self> {
        if mass <= 0.0 {
            return Err(Error::Physics(format!("payload mass {mass} must be > 0")));
        }
        if inertia <= 0.0 {
            return Err(Error::Physics(format!(
                "payload inertia {inertia} must be > 0"
            )));
        }
        if !polygon_is_convex_ccw(&shape) {
            return Err(Error::Physics(
                "payload shape must be a convex counterclockwise polygon".into(),
            ));
        }
        Ok(Self {
            pose,
            twist: Twist2::ZERO,
            shape,
            mass,
            inertia,
            desired,
            pinned: false,
        })
    }

    pub fn world_vertices(&self) -> Vec<Vec2> {
        self.shape.iter().map(|&v| self.pose.to_world(v)).collect()
    }

    /// Velocity of the body-fixed point currently at world position `p`.
    pub fn point_velocity(&self, p: Vec2) -> Vec2 {
        let r = p - self.pose.position;
        self.twist.linear + r.perp() * self.twist.angular
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.mass * self.twist.linear.dot(self.twist.linear)
            + 0.5 * self.inertia * self.twist.angular * self.twist.angular
    }
}

/// Velocity command for a unicycle agent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub linear: f64,
    pub angular: f64,
}

/// Disc-shaped kinematic agent. `applied_wrench` holds the force this agent
/// exerted on the payload and its torque about the payload center, averaged
/// over the substeps of the most recent `step_world` call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentBody {
    pub pose: Pose2,
    pub radius: f64,
    pub mass: f64,
    pub inertia: f64,
    pub command: Command,
    pub max_linear: f64,
    pub max_angular: f64,
    pub applied_wrench: Wrench2,
}

impl AgentBody {
    pub fn new(pose: Pose2, radius: f64, mass: f64, inertia: f64) -> Result<Self> {
        if radius <= 0.0 {
            return Err(Error::Physics(format!("agent radius {radius} must be > 0")));
        }
        Ok(Self {
            pose,
            radius,
            mass,
            inertia,
            command: Command::default(),
            max_linear: f64::INFINITY,
            max_angular: f64::INFINITY,
            applied_wrench: Wrench2::ZERO,
        })
    }

    pub fn with_limits(mut self, max_linear: f64, max_angular: f64) -> Self {
        self.max_linear = max_linear;
        self.max_angular = max_angular;
        self
    }

    /// Store a command, clamped to the configured bounds.
    pub fn set_command(&mut self, command: Command) {
        self.command = Command {
            linear: command.linear.clamp(-self.max_linear, self.max_linear),
            angular: command.angular.clamp(-self.max_angular, self.max_angular),
        };
    }

    /// Translational velocity realized by the current command.
    pub fn velocity(&self) -> Vec2 {
        self.pose.heading() * self.command.linear
    }
}

/// Penalty contact constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    /// Normal spring stiffness, N/m.
    pub stiffness: f64,
    /// Normal damping, N.s/m.
    pub normal_damping: f64,
    /// Viscous coefficient regularizing stick friction, N.s/m.
    pub tangential_damping: f64,
    /// Coulomb friction coefficient bounding the tangential force.
    pub friction_coefficient: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            stiffness: 1.0e4,
            normal_damping: 50.0,
            tangential_damping: 50.0,
            friction_coefficient: 0.3,
        }
    }
}

/// Viscous ground damping on the payload twist, standing in for ground
/// friction so the payload stops when unpushed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundParams {
    pub linear_damping: f64,
    pub angular_damping: f64,
}

impl Default for GroundParams {
    fn default() -> Self {
        Self {
            linear_damping: 20.0,
            angular_damping: 5.0,
        }
    }
}

/// Circle-vs-polygon overlap result. The normal points from the payload
/// surface toward the agent center and the contact point lies on the payload
/// boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub point: Vec2,
    pub normal: Vec2,
    pub penetration: f64,
}

/// Complete simulation state plus integration constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub payload: PayloadState,
    pub agents: Vec<AgentBody>,
    pub contact: ContactParams,
    pub ground: GroundParams,
    /// Integration substep, s.
    pub substep: f64,
    /// Penetration beyond this depth is reported as a simulation fault.
    /// Deep overlap is legal (agents have infinite traction and can press
    /// hard), so the cap sits above any geometrically reachable depth and
    /// only fires when the integrator has lost the contact.
    pub max_penetration: f64,
}

impl World {
    pub fn new(payload: PayloadState, agents: Vec<AgentBody>) -> Self {
        Self {
            payload,
            agents,
            contact: ContactParams::default(),
            ground: GroundParams::default(),
            substep: 0.01,
            max_penetration: 0.5,
        }
    }
}

/// Outcome of one `step_world` call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Deepest overlap seen during the step.
    pub max_penetration: f64,
    /// Substeps during which at least one contact was active.
    pub contact_substeps: usize,
}

/// Sum of the wrenches the agents applied to the payload.
pub fn resultant_wrench(agents: &[AgentBody]) -> Wrench2 {
    let mut total = Wrench2::ZERO;
    for agent in agents {
        total += agent.applied_wrench;
    }
    total
}

/// Deepest-point query of one agent disc against the payload polygon.
///
/// Returns `None` when the disc clears the polygon. When the center has
/// passed inside, the contact resolves through the nearest edge so the
/// penalty force still separates the bodies.
pub fn contact_query(payload: &PayloadState, agent: &AgentBody) -> Option<Contact> {
    let vertices = payload.world_vertices();
    let center = agent.pose.position;
    let n = vertices.len();

    let mut inside = true;
    let mut closest = vertices[0];
    let mut closest_dist = f64::INFINITY;
    let mut closest_edge_normal = Vec2::new(1.0, 0.0);
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let edge = b - a;
        if edge.cross(center - a) < 0.0 {
            inside = false;
        }
        let len_sq = edge.dot(edge);
        let t = if len_sq > 0.0 {
            ((center - a).dot(edge) / len_sq).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let candidate = a + edge * t;
        let dist = (center - candidate).norm();
        if dist < closest_dist {
            closest_dist = dist;
            closest = candidate;
            closest_edge_normal =
                Vec2::new(edge.y, -edge.x).normalized().unwrap_or(closest_edge_normal);
        }
    }

    if inside {
        return Some(Contact {
            point: closest,
            normal: closest_edge_normal,
            penetration: agent.radius + closest_dist,
        });
    }
    if closest_dist > agent.radius {
        return None;
    }
    let normal = if closest_dist > 1e-12 {
        (center - closest) * (1.0 / closest_dist)
    } else {
        closest_edge_normal
    };
    Some(Contact {
        point: closest,
        normal,
        penetration: agent.radius - closest_dist,
    })
}

/// Advance the world by `duration`, which must be a whole number of
/// substeps. Commands stay fixed for the whole call. Each agent's
/// `applied_wrench` is replaced with its substep-averaged contact wrench.
pub fn step_world(world: &mut World, duration: f64) -> Result<StepReport> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::Physics(format!("step duration {duration} invalid")));
    }
    let steps_f = duration / world.substep;
    let steps = steps_f.round() as usize;
    if steps == 0 || (steps_f - steps as f64).abs() > 1e-9 * steps_f.max(1.0) {
        return Err(Error::Physics(format!(
            "duration {duration} is not a whole number of {} s substeps",
            world.substep
        )));
    }
    check_finite(world)?;

    let n_agents = world.agents.len();
    let mut accumulated = vec![Wrench2::ZERO; n_agents];
    let mut report = StepReport {
        max_penetration: 0.0,
        contact_substeps: 0,
    };
    let h = world.substep;

    for _ in 0..steps {
        let mut total_force = Vec2::ZERO;
        let mut total_torque = 0.0;
        let mut any_contact = false;

        for (i, agent) in world.agents.iter().enumerate() {
            let Some(contact) = contact_query(&world.payload, agent) else {
                continue;
            };
            any_contact = true;
            report.max_penetration = report.max_penetration.max(contact.penetration);

            let v_rel = agent.velocity() - world.payload.point_velocity(contact.point);
            let closing_rate = -v_rel.dot(contact.normal);
            let normal_force = (world.contact.stiffness * contact.penetration
                + world.contact.normal_damping * closing_rate)
                .max(0.0);

            let v_tangential = v_rel - contact.normal * v_rel.dot(contact.normal);
            let slip = v_tangential.norm();
            let friction_force = if slip > 1e-12 {
                let magnitude = (world.contact.tangential_damping * slip)
                    .min(world.contact.friction_coefficient * normal_force);
                v_tangential * (magnitude / slip)
            } else {
                Vec2::ZERO
            };

            let force = contact.normal * (-normal_force) + friction_force;
            let torque = (contact.point - world.payload.pose.position).cross(force);
            accumulated[i] += Wrench2::new(force, torque);
            total_force += force;
            total_torque += torque;
        }
        if any_contact {
            report.contact_substeps += 1;
        }

        total_force += world.payload.twist.linear * (-world.ground.linear_damping);
        total_torque += -world.ground.angular_damping * world.payload.twist.angular;

        let payload = &mut world.payload;
        payload.twist.angular += total_torque / payload.inertia * h;
        if payload.pinned {
            payload.twist.linear = Vec2::ZERO;
        } else {
            payload.twist.linear += total_force * (h / payload.mass);
            payload.pose.position += payload.twist.linear * h;
        }
        payload.pose.rotate_by(payload.twist.angular * h);

        for agent in &mut world.agents {
            let heading = agent.pose.heading();
            agent.pose.position += heading * (agent.command.linear * h);
            agent.pose.rotate_by(agent.command.angular * h);
        }
    }

    for (agent, wrench) in world.agents.iter_mut().zip(accumulated) {
        agent.applied_wrench = Wrench2::new(
            wrench.force * (1.0 / steps as f64),
            wrench.torque / steps as f64,
        );
    }
    check_finite(world)?;
    if report.max_penetration > world.max_penetration {
        return Err(Error::Physics(format!(
            "penetration {:.4} m exceeded the {:.4} m fault cap",
            report.max_penetration, world.max_penetration
        )));
    }
    Ok(report)
}

fn check_finite(world: &World) -> Result<()> {
    let p = &world.payload;
    if !(p.pose.position.is_finite()
        && p.pose.yaw.is_finite()
        && p.twist.linear.is_finite()
        && p.twist.angular.is_finite())
    {
        return Err(Error::NonFinite("payload state"));
    }
    for agent in &world.agents {
        if !(agent.pose.position.is_finite()
            && agent.pose.yaw.is_finite()
            && agent.command.linear.is_finite()
            && agent.command.angular.is_finite())
        {
            return Err(Error::NonFinite("agent state"));
        }
    }
    Ok(())
}

/// Convexity check: every turn is a left turn and no vertex repeats.
pub fn polygon_is_convex_ccw(vertices: &[Vec2]) -> bool {
    let n = vertices.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let c = vertices[(i + 2) % n];
        if (b - a).cross(c - b) <= 0.0 {
            return false;
        }
    }
    true
}

/// Isosceles triangle with the given base and equal-side lengths, centroid at
/// the origin, apex on +y. Counterclockwise.
pub fn isosceles_triangle(base: f64, side: f64) -> Result<Vec<Vec2>> {
    let half = base / 2.0;
    let height_sq = side * side - half * half;
    if height_sq <= 0.0 {
        return Err(Error::Physics(format!(
            "sides {side} cannot close a triangle over base {base}"
        )));
    }
    let height = height_sq.sqrt();
    Ok(vec![
        Vec2::new(-half, -height / 3.0),
        Vec2::new(half, -height / 3.0),
        Vec2::new(0.0, 2.0 * height / 3.0),
    ])
}

/// Axis-aligned rectangle centered at the origin, counterclockwise.
pub fn rectangle(width: f64, height: f64) -> Vec<Vec2> {
    let (w, h) = (width / 2.0, height / 2.0);
    vec![
        Vec2::new(-w, -h),
        Vec2::new(w, -h),
        Vec2::new(w, h),
        Vec2::new(-w, h),
    ]
}
