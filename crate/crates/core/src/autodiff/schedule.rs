use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    /// Linear warm-up from `max_lr / div_factor` to `max_lr`, then cosine
    /// annealing down to `max_lr / final_div_factor`.
    OneCycle {
        max_lr: f64,
        warmup_fraction: f64,
        div_factor: f64,
        final_div_factor: f64,
    },
    /// Cosine decay from `initial_lr` to `min_lr`.
    CosineDecay { initial_lr: f64, min_lr: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn one_cycle(max_lr: f64, total_steps: usize) -> Self {
        LrSchedule {
            kind: ScheduleKind::OneCycle {
                max_lr,
                warmup_fraction: 0.3,
                div_factor: 25.0,
                final_div_factor: 1e4,
            },
            total_steps: total_steps.max(1),
        }
    }

    pub fn cosine_decay(initial_lr: f64, total_steps: usize) -> Self {
        Self::cosine_decay_to(initial_lr, 1e-7, total_steps)
    }

    pub fn cosine_decay_to(initial_lr: f64, min_lr: f64, total_steps: usize) -> Self {
        LrSchedule {
            kind: ScheduleKind::CosineDecay { initial_lr, min_lr },
            total_steps: total_steps.max(1),
        }
    }

    /// Learning rate at `step` (0-based); steps past the end hold the final value.
    pub fn lr(&self, step: usize) -> f64 {
        let total = self.total_steps as f64;
        let t = step.min(self.total_steps) as f64;
        match self.kind {
            ScheduleKind::OneCycle {
                max_lr,
                warmup_fraction,
                div_factor,
                final_div_factor,
            } => {
                let start = max_lr / div_factor;
                let end = max_lr / final_div_factor;
                let warm = (warmup_fraction * total).round();
                if t <= warm && warm > 0.0 {
                    start + (max_lr - start) * t / warm
                } else {
                    let progress = ((t - warm) / (total - warm).max(1.0)).min(1.0);
                    end + (max_lr - end) * 0.5 * (1.0 + (PI * progress).cos())
                }
            }
            ScheduleKind::CosineDecay { initial_lr, min_lr } => {
                min_lr + (initial_lr - min_lr) * 0.5 * (1.0 + (PI * t / total).cos())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_cycle_peaks_at_end_of_warmup() {
        let s = LrSchedule::one_cycle(0.01, 100);
        assert!((s.lr(30) - 0.01).abs() < 1e-15);
        assert!((s.lr(0) - 0.01 / 25.0).abs() < 1e-15);
        assert!((s.lr(100) - 0.01 / 1e4).abs() < 1e-15);
        assert!(s.lr(15) < s.lr(30) && s.lr(60) < s.lr(30));
    }

    #[test]
    fn cosine_decay_hits_floor() {
        let s = LrSchedule::cosine_decay(1e-4, 250);
        assert_eq!(s.lr(0), 1e-4);
        assert_eq!(s.lr(250), 1e-7);
        assert_eq!(s.lr(1000), 1e-7);
    }

    #[test]
    fn single_step_schedules_stay_positive() {
        for s in [LrSchedule::one_cycle(0.01, 1), LrSchedule::cosine_decay(1e-3, 1)] {
            for t in 0..3 {
                assert!(s.lr(t) > 0.0);
            }
        }
    }
}
