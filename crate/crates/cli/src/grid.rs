use image::{imageops, GrayImage, Rgb, RgbImage};

pub const COLUMNS: usize = 4;

pub fn gray_to_rgb(g: &GrayImage) -> RgbImage {
    RgbImage::from_fn(g.width(), g.height(), |x, y| {
        let v = g.get_pixel(x, y)[0];
        Rgb([v, v, v])
    })
}

/// Mid-gray tile for a column with nothing to show.
pub fn blank(side: u32) -> RgbImage {
    RgbImage::from_pixel(side, side, Rgb([128, 128, 128]))
}

/// Tiles equally sized images row by row.
pub fn compose(rows: &[[RgbImage; COLUMNS]]) -> RgbImage {
    let (w, h) = rows
        .first()
        .map_or((0, 0), |r| (r[0].width(), r[0].height()));
    let mut out = RgbImage::new(w * COLUMNS as u32, h * rows.len() as u32);
    for (i, row) in rows.iter().enumerate() {
        for (j, tile) in row.iter().enumerate() {
            imageops::replace(&mut out, tile, (j as u32 * w) as i64, (i as u32 * h) as i64);
        }
    }
    out
}
