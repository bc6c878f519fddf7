//! Legacy ASCII VTK output for unstructured tetrahedral grids.
//!
//! Nonconforming velocity fields have no vertex values, so the velocity is
//! written twice: as cell-data averages on the mesh for conventional
//! viewers, and as point data on a synthetic point cloud at the edge
//! midpoints (the native degrees of freedom).

use rq1_core::geometry::Point3;
use rq1_core::mesh::Mesh;
use rq1_core::spaces::{DiscreteField, VelocityDofMap};
use std::io::{self, Write};

fn write_header<W: Write>(w: &mut W, title: &str) -> io::Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    Ok(())
}

fn write_points<W: Write>(w: &mut W, points: &[Point3]) -> io::Result<()> {
    writeln!(w, "POINTS {} double", points.len())?;
    for p in points {
        writeln!(w, "{:.16e} {:.16e} {:.16e}", p[0], p[1], p[2])?;
    }
    Ok(())
}

/// Writes the mesh with pressure as vertex point-data and velocity as
/// cell-data averages (the mean of the six edge-midpoint values, which is
/// the exact cell mean for the shape space).
pub fn write_mesh_fields<W: Write>(
    w: &mut W,
    mesh: &Mesh,
    vmap: &VelocityDofMap,
    velocity: &DiscreteField,
    pressure: &DiscreteField,
) -> io::Result<()> {
    write_header(w, "rotated-Q1 Stokes solution")?;
    write_points(w, mesh.vertices())?;

    writeln!(w, "CELLS {} {}", mesh.n_cells(), 5 * mesh.n_cells())?;
    for cell in mesh.cells() {
        writeln!(w, "4 {} {} {} {}", cell[0], cell[1], cell[2], cell[3])?;
    }
    writeln!(w, "CELL_TYPES {}", mesh.n_cells())?;
    for _ in 0..mesh.n_cells() {
        writeln!(w, "10")?;
    }

    writeln!(w, "POINT_DATA {}", mesh.n_vertices())?;
    writeln!(w, "SCALARS pressure double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for &p in &pressure.coeffs {
        writeln!(w, "{:.16e}", p)?;
    }

    writeln!(w, "CELL_DATA {}", mesh.n_cells())?;
    writeln!(w, "VECTORS velocity_cell_mean double")?;
    for c in 0..mesh.n_cells() {
        let mut mean = [0.0f64; 3];
        for &e in &mesh.cell_edges(c) {
            for (m, comp) in mean.iter_mut().zip(0..3) {
                *m += velocity.coeffs[vmap.dof(e, comp)];
            }
        }
        writeln!(
            w,
            "{:.16e} {:.16e} {:.16e}",
            mean[0] / 6.0,
            mean[1] / 6.0,
            mean[2] / 6.0
        )?;
    }
    Ok(())
}

/// Writes the edge-midpoint cloud with velocity vectors as point data.
pub fn write_midpoint_cloud<W: Write>(
    w: &mut W,
    mesh: &Mesh,
    vmap: &VelocityDofMap,
    velocity: &DiscreteField,
) -> io::Result<()> {
    write_header(w, "rotated-Q1 velocity degrees of freedom")?;
    let midpoints: Vec<Point3> = (0..mesh.n_edges()).map(|e| mesh.edge_midpoint(e)).collect();
    write_points(w, &midpoints)?;

    writeln!(w, "CELLS {} {}", midpoints.len(), 2 * midpoints.len())?;
    for i in 0..midpoints.len() {
        writeln!(w, "1 {i}")?;
    }
    writeln!(w, "CELL_TYPES {}", midpoints.len())?;
    for _ in 0..midpoints.len() {
        writeln!(w, "1")?;
    }

    writeln!(w, "POINT_DATA {}", midpoints.len())?;
    writeln!(w, "VECTORS velocity double")?;
    for e in 0..mesh.n_edges() {
        writeln!(
            w,
            "{:.16e} {:.16e} {:.16e}",
            velocity.coeffs[vmap.dof(e, 0)],
            velocity.coeffs[vmap.dof(e, 1)],
            velocity.coeffs[vmap.dof(e, 2)]
        )?;
    }
    Ok(())
}
