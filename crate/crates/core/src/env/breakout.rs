//! 10x10 grid Breakout following the MinAtar rules: a paddle on the bottom
//! row, a ball moving diagonally one cell per step, three rows of bricks.
//!
//! Observation: four binary channels (paddle, ball, trail, brick), each a
//! row-major 10x10 grid, channel-major. Actions: 0 no-op, 1 left, 2 right.
//! Unlike MinAtar the bricks do not respawn: clearing the wall ends the
//! episode, so the return is capped at [`N_BRICKS`].

use rand::Rng;

pub const GRID: usize = 10;
pub(crate) const N_BRICKS: usize = 3 * GRID;
const BRICK_ROWS: std::ops::Range<usize> = 1..4;

/// Ball directions: 0 up-left, 1 up-right, 2 down-right, 3 down-left.
const FLIP_X: [u8; 4] = [1, 0, 3, 2];
const FLIP_Y: [u8; 4] = [3, 2, 1, 0];
const CORNER: [u8; 4] = [2, 3, 0, 1];

#[derive(Debug, Clone, PartialEq)]
pub struct Breakout {
    pub paddle: usize,
    pub ball_x: usize,
    pub ball_y: usize,
    pub ball_dir: u8,
    pub last_x: usize,
    pub last_y: usize,
    pub bricks: [[bool; GRID]; GRID],
    strike: bool,
}

impl Breakout {
    pub(crate) fn reset<R: Rng>(rng: &mut R) -> Self {
        let (ball_x, ball_dir) = if rng.random_bool(0.5) { (0, 2) } else { (9, 3) };
        let mut bricks = [[false; GRID]; GRID];
        for row in &mut bricks[BRICK_ROWS] {
            *row = [true; GRID];
        }
        Self {
            paddle: GRID / 2 - 1,
            ball_x,
            ball_y: 3,
            ball_dir,
            last_x: ball_x,
            last_y: 3,
            bricks,
            strike: false,
        }
    }

    pub(crate) fn observe(&self, out: &mut [f32]) {
        out.fill(0.0);
        let cell = |c: usize, y: usize, x: usize| c * GRID * GRID + y * GRID + x;
        out[cell(0, GRID - 1, self.paddle)] = 1.0;
        out[cell(1, self.ball_y, self.ball_x)] = 1.0;
        out[cell(2, self.last_y, self.last_x)] = 1.0;
        for (y, row) in self.bricks.iter().enumerate() {
            for (x, &b) in row.iter().enumerate() {
                if b {
                    out[cell(3, y, x)] = 1.0;
                }
            }
        }
    }

    pub fn bricks_left(&self) -> usize {
        self.bricks.iter().flatten().filter(|&&b| b).count()
    }

    pub(crate) fn step(&mut self, action: usize) -> (f64, bool) {
        match action {
            1 => self.paddle = self.paddle.saturating_sub(1),
            2 => self.paddle = (self.paddle + 1).min(GRID - 1),
            _ => {}
        }

        self.last_x = self.ball_x;
        self.last_y = self.ball_y;
        let dx: isize = if matches!(self.ball_dir, 1 | 2) { 1 } else { -1 };
        let dy: isize = if self.ball_dir < 2 { -1 } else { 1 };
        let mut new_x = self.ball_x as isize + dx;
        let mut new_y = self.ball_y as isize + dy;

        let mut reward = 0.0;
        let mut terminal = false;
        let mut strike_now = false;
        if !(0..GRID as isize).contains(&new_x) {
            new_x = new_x.clamp(0, GRID as isize - 1);
            self.ball_dir = FLIP_X[self.ball_dir as usize];
        }
        if new_y < 0 {
            new_y = 0;
            self.ball_dir = FLIP_Y[self.ball_dir as usize];
        } else if self.bricks[new_y as usize][new_x as usize] {
            strike_now = true;
            if !self.strike {
                reward = 1.0;
                self.strike = true;
                self.bricks[new_y as usize][new_x as usize] = false;
                new_y = self.last_y as isize;
                self.ball_dir = FLIP_Y[self.ball_dir as usize];
                terminal = self.bricks_left() == 0;
            }
        } else if new_y == GRID as isize - 1 {
            if self.ball_x == self.paddle {
                self.ball_dir = FLIP_Y[self.ball_dir as usize];
                new_y = self.last_y as isize;
            } else if new_x as usize == self.paddle {
                self.ball_dir = CORNER[self.ball_dir as usize];
                new_y = self.last_y as isize;
            } else {
                terminal = true;
            }
        }
        if !strike_now {
            self.strike = false;
        }
        self.ball_x = new_x as usize;
        self.ball_y = new_y as usize;
        (reward, terminal)
    }

    /// Keeps the paddle under the ball's current column, so every paddle
    /// contact is a straight bounce.
    pub(crate) fn scripted_action(&self) -> usize {
        match self.ball_x.cmp(&self.paddle) {
            std::cmp::Ordering::Less => 1,
            std::cmp::Ordering::Greater => 2,
            std::cmp::Ordering::Equal => 0,
        }
    }
}
